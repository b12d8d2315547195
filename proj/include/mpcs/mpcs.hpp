#pragma once

#include "mpcs/analysis.hpp"
#include "mpcs/baselines.hpp"
#include "mpcs/core.hpp"
#include "mpcs/data_io.hpp"
#include "mpcs/metapattern.hpp"
#include "mpcs/scoring.hpp"
#include "mpcs/trainer.hpp"
