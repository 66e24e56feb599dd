#pragma once

// Umbrella header for the maskfuse library: attention-based fusion of six
// per-expression feature maps, an adaptive class-balanced focal loss, Adam
// training with stratified cross-validation, and imbalance-aware metrics.

#include "maskfuse/adam.hpp"
#include "maskfuse/dataset.hpp"
#include "maskfuse/errors.hpp"
#include "maskfuse/gradcheck.hpp"
#include "maskfuse/io.hpp"
#include "maskfuse/labels.hpp"
#include "maskfuse/linalg.hpp"
#include "maskfuse/loss.hpp"
#include "maskfuse/metrics.hpp"
#include "maskfuse/model.hpp"
#include "maskfuse/rng.hpp"
#include "maskfuse/train.hpp"
