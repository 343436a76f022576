#pragma once

#include "bayescal/harness/commands.hpp"
#include "bayescal/harness/experiment.hpp"
#include "bayescal/harness/manifest.hpp"
#include "bayescal/harness/search.hpp"
#include "bayescal/harness/search_space.hpp"
#include "bayescal/harness/trial.hpp"
