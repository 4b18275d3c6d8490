// Umbrella header.
#pragma once

#include "awnet/blocks.hpp"
#include "awnet/data.hpp"
#include "awnet/ensemble.hpp"
#include "awnet/gradcheck.hpp"
#include "awnet/image_io.hpp"
#include "awnet/loss.hpp"
#include "awnet/network.hpp"
#include "awnet/ops.hpp"
#include "awnet/serialize.hpp"
#include "awnet/tensor.hpp"
#include "awnet/trainer.hpp"
#include "awnet/wavelet.hpp"
