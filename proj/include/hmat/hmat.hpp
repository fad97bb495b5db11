#pragma once

#include "hmat/checkpoint.hpp"
#include "hmat/commands.hpp"
#include "hmat/config.hpp"
#include "hmat/decoder.hpp"
#include "hmat/errors.hpp"
#include "hmat/gradcheck.hpp"
#include "hmat/gradcheck_suite.hpp"
#include "hmat/image_io.hpp"
#include "hmat/madf.hpp"
#include "hmat/mask.hpp"
#include "hmat/metrics.hpp"
#include "hmat/ops.hpp"
#include "hmat/params.hpp"
#include "hmat/rng.hpp"
#include "hmat/run_config.hpp"
#include "hmat/selftest.hpp"
#include "hmat/style.hpp"
#include "hmat/tensor.hpp"
#include "hmat/train.hpp"
#include "hmat/transformer.hpp"
