#pragma once

#include "signflow/core/binary.hpp"
#include "signflow/core/error.hpp"
#include "signflow/core/ndarray.hpp"
#include "signflow/autograd/grad_check.hpp"
#include "signflow/autograd/ops.hpp"
#include "signflow/autograd/tensor.hpp"
#include "signflow/nn/layers.hpp"
#include "signflow/flow/flow_sequence.hpp"
#include "signflow/flow/image.hpp"
#include "signflow/flow/optical_flow.hpp"
#include "signflow/model/attention.hpp"
#include "signflow/model/decoder.hpp"
#include "signflow/model/encoder.hpp"
#include "signflow/model/gloss_ctc.hpp"
#include "signflow/model/grad_suite.hpp"
#include "signflow/model/stfe.hpp"
#include "signflow/model/translator.hpp"
#include "signflow/decode/metrics.hpp"
#include "signflow/decode/search.hpp"
#include "signflow/data/augment.hpp"
#include "signflow/data/manifest.hpp"
#include "signflow/data/synthetic.hpp"
#include "signflow/data/vocabulary.hpp"
#include "signflow/train/checkpoint.hpp"
#include "signflow/train/config.hpp"
#include "signflow/train/optimizer.hpp"
#include "signflow/train/trainer.hpp"
