#pragma once

// Single include for the whole library: numeric core, data pipeline, model,
// interaction selection, training loops, metrics, persistence, and the
// command layer used by the CLI.

#include "fisel/errors.hpp"
#include "fisel/matrix.hpp"
#include "fisel/adam.hpp"
#include "fisel/mlp.hpp"
#include "fisel/vocab.hpp"
#include "fisel/dataset.hpp"
#include "fisel/synthetic.hpp"
#include "fisel/model.hpp"
#include "fisel/selection.hpp"
#include "fisel/metrics.hpp"
#include "fisel/trainer.hpp"
#include "fisel/checkpoint.hpp"
#include "fisel/config.hpp"
#include "fisel/commands.hpp"
