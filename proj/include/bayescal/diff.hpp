#pragma once

#include "bayescal/diff/array.hpp"
#include "bayescal/diff/grad.hpp"
#include "bayescal/diff/ops.hpp"
#include "bayescal/diff/var.hpp"
