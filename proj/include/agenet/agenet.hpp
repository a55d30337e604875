#pragma once

#include "agenet/autograd.hpp"
#include "agenet/baselines.hpp"
#include "agenet/checkpoint.hpp"
#include "agenet/conv.hpp"
#include "agenet/data.hpp"
#include "agenet/error.hpp"
#include "agenet/features.hpp"
#include "agenet/finite_diff.hpp"
#include "agenet/ftns.hpp"
#include "agenet/image.hpp"
#include "agenet/layers.hpp"
#include "agenet/losses.hpp"
#include "agenet/model_spec.hpp"
#include "agenet/network.hpp"
#include "agenet/npy.hpp"
#include "agenet/ops.hpp"
#include "agenet/optim.hpp"
#include "agenet/rng.hpp"
#include "agenet/svg_plot.hpp"
#include "agenet/tensor.hpp"
#include "agenet/train.hpp"
