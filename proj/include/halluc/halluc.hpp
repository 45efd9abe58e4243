#pragma once
// Umbrella header.

#include "halluc/alignment.hpp"
#include "halluc/decoding.hpp"
#include "halluc/error.hpp"
#include "halluc/grounding.hpp"
#include "halluc/info.hpp"
#include "halluc/phase.hpp"
#include "halluc/pipeline.hpp"
#include "halluc/prob.hpp"
#include "halluc/rng.hpp"
#include "halluc/toy_lm.hpp"
#include "halluc/uncertainty.hpp"
