#pragma once

#include "cogmap/diff/adam.hpp"
#include "cogmap/diff/backward.hpp"
#include "cogmap/diff/batchnorm.hpp"
#include "cogmap/diff/ops.hpp"
#include "cogmap/diff/tensor.hpp"
