#pragma once

#include "cl3r/autodiff/grad_check.hpp"
#include "cl3r/autodiff/ops.hpp"
#include "cl3r/autodiff/tensor.hpp"
