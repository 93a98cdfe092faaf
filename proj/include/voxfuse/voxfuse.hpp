#pragma once

#include "voxfuse/bench.hpp"
#include "voxfuse/binary_io.hpp"
#include "voxfuse/error.hpp"
#include "voxfuse/executor.hpp"
#include "voxfuse/geometry.hpp"
#include "voxfuse/ir.hpp"
#include "voxfuse/kernels.hpp"
#include "voxfuse/network.hpp"
#include "voxfuse/passes.hpp"
#include "voxfuse/plan.hpp"
#include "voxfuse/plan_io.hpp"
#include "voxfuse/prototxt.hpp"
#include "voxfuse/reference.hpp"
#include "voxfuse/shapes.hpp"
#include "voxfuse/simd.hpp"
#include "voxfuse/tensor.hpp"
#include "voxfuse/tiling.hpp"
#include "voxfuse/volume_io.hpp"
#include "voxfuse/weights.hpp"
#include "voxfuse/zoo.hpp"
