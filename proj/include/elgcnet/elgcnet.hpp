#pragma once

// Umbrella header: pulls in the full library.

#include "elgcnet/analysis.hpp"
#include "elgcnet/checkpoint.hpp"
#include "elgcnet/conv.hpp"
#include "elgcnet/data.hpp"
#include "elgcnet/elgca.hpp"
#include "elgcnet/gradcheck.hpp"
#include "elgcnet/image_io.hpp"
#include "elgcnet/layers.hpp"
#include "elgcnet/metrics.hpp"
#include "elgcnet/network.hpp"
#include "elgcnet/ops.hpp"
#include "elgcnet/random.hpp"
#include "elgcnet/serialize.hpp"
#include "elgcnet/tensor.hpp"
#include "elgcnet/train.hpp"
