#pragma once

#include "meshflow/autoencoder/latents.hpp"
#include "meshflow/autoencoder/train.hpp"
#include "meshflow/autoencoder/vae.hpp"
#include "meshflow/config.hpp"
#include "meshflow/dit/condition.hpp"
#include "meshflow/dit/generate.hpp"
#include "meshflow/dit/model.hpp"
#include "meshflow/dit/train.hpp"
#include "meshflow/errors.hpp"
#include "meshflow/flow/flow.hpp"
#include "meshflow/geometry/adjacency.hpp"
#include "meshflow/geometry/attributes.hpp"
#include "meshflow/geometry/augment.hpp"
#include "meshflow/geometry/canonical.hpp"
#include "meshflow/geometry/manifest.hpp"
#include "meshflow/geometry/mesh.hpp"
#include "meshflow/geometry/nearest.hpp"
#include "meshflow/geometry/obj.hpp"
#include "meshflow/geometry/sampling.hpp"
#include "meshflow/geometry/synthetic.hpp"
#include "meshflow/metrics/metrics.hpp"
#include "meshflow/nn/attention.hpp"
#include "meshflow/nn/checkpoint.hpp"
#include "meshflow/nn/gradcheck.hpp"
#include "meshflow/nn/layers.hpp"
#include "meshflow/nn/ops.hpp"
#include "meshflow/nn/optim.hpp"
#include "meshflow/nn/params.hpp"
#include "meshflow/nn/tape.hpp"
#include "meshflow/parallel.hpp"
#include "meshflow/pipeline/commands.hpp"
#include "meshflow/pipeline/config.hpp"
#include "meshflow/pipeline/gradcheck_suite.hpp"
#include "meshflow/rng.hpp"
