#pragma once

// Umbrella header.

#include "kddids/cli.hpp"
#include "kddids/common.hpp"
#include "kddids/config.hpp"
#include "kddids/dataset.hpp"
#include "kddids/evaluation.hpp"
#include "kddids/hybrid_pipeline.hpp"
#include "kddids/labels.hpp"
#include "kddids/misuse_centroids.hpp"
#include "kddids/neural_net.hpp"
#include "kddids/random_forest.hpp"
