#pragma once

#include "bayescal/data/dataset.hpp"
#include "bayescal/data/encode.hpp"
#include "bayescal/data/io.hpp"
#include "bayescal/data/sampling.hpp"
