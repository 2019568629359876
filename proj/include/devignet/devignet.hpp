#pragma once

// Umbrella header for the devignet library.

#include "acem.hpp"
#include "autograd.hpp"
#include "daft.hpp"
#include "data.hpp"
#include "hcam.hpp"
#include "image.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "nn.hpp"
#include "ops.hpp"
#include "pyramid.hpp"
#include "tensor.hpp"
#include "train.hpp"
