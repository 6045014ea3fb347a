#pragma once

#include "rkan/backbone.hpp"
#include "rkan/basis.hpp"
#include "rkan/checkpoint.hpp"
#include "rkan/data.hpp"
#include "rkan/gradcheck.hpp"
#include "rkan/kan_conv.hpp"
#include "rkan/module.hpp"
#include "rkan/ops.hpp"
#include "rkan/rkan_block.hpp"
#include "rkan/tensor.hpp"
#include "rkan/training.hpp"
