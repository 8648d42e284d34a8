#pragma once

#include "drql/core.hpp"
#include "drql/dual.hpp"
#include "drql/dual_oracle.hpp"
#include "drql/envs.hpp"
#include "drql/json_io.hpp"
#include "drql/learner.hpp"
#include "drql/mlmc.hpp"
#include "drql/rng.hpp"
#include "drql/robustdp.hpp"
