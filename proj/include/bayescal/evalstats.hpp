#pragma once

#include "bayescal/evalstats/aggregate.hpp"
#include "bayescal/evalstats/base_to_new.hpp"
#include "bayescal/evalstats/landscape.hpp"
#include "bayescal/evalstats/metrics.hpp"
#include "bayescal/evalstats/predict.hpp"
#include "bayescal/evalstats/wilcoxon.hpp"
