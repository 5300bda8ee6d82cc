#pragma once

// Everything in one include.

#include "olvit/error.hpp"
#include "olvit/rng.hpp"
#include "olvit/tensor.hpp"
#include "olvit/ops.hpp"
#include "olvit/gradcheck.hpp"
#include "olvit/params.hpp"
#include "olvit/attention.hpp"
#include "olvit/vocab.hpp"
#include "olvit/scene.hpp"
#include "olvit/oracle.hpp"
#include "olvit/dialog.hpp"
#include "olvit/encoders.hpp"
#include "olvit/config.hpp"
#include "olvit/trackers.hpp"
#include "olvit/combiner.hpp"
#include "olvit/model.hpp"
#include "olvit/model_gradcheck.hpp"
#include "olvit/optim.hpp"
#include "olvit/dataset.hpp"
#include "olvit/checkpoint.hpp"
#include "olvit/train.hpp"
#include "olvit/eval.hpp"
