#pragma once

#include "hrkd/autodiff.hpp"
#include "hrkd/checkpoint.hpp"
#include "hrkd/compare_aggregate.hpp"
#include "hrkd/config.hpp"
#include "hrkd/data.hpp"
#include "hrkd/encoder.hpp"
#include "hrkd/errors.hpp"
#include "hrkd/grad_check.hpp"
#include "hrkd/kd_losses.hpp"
#include "hrkd/metrics.hpp"
#include "hrkd/ops.hpp"
#include "hrkd/optimizer.hpp"
#include "hrkd/prototypes.hpp"
#include "hrkd/relational_graph.hpp"
#include "hrkd/report.hpp"
#include "hrkd/tensor.hpp"
#include "hrkd/trainer.hpp"
