#pragma once

// Convenience umbrella for the whole library.

#include "specmatch/common.hpp"
#include "specmatch/container.hpp"
#include "specmatch/contrastive.hpp"
#include "specmatch/eval.hpp"
#include "specmatch/feature_net.hpp"
#include "specmatch/fmap.hpp"
#include "specmatch/mesh.hpp"
#include "specmatch/method_map.hpp"
#include "specmatch/shapes.hpp"
#include "specmatch/spectral.hpp"
#include "specmatch/tape.hpp"
#include "specmatch/trainer.hpp"
