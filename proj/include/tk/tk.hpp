// Convenience header pulling in the whole library.
#pragma once

#include "tk/checkpoint.hpp"
#include "tk/common.hpp"
#include "tk/config.hpp"
#include "tk/contextualizer.hpp"
#include "tk/evaluation.hpp"
#include "tk/first_stage.hpp"
#include "tk/interpretability.hpp"
#include "tk/kernel_scorer.hpp"
#include "tk/model.hpp"
#include "tk/parallel.hpp"
#include "tk/pipeline.hpp"
#include "tk/query_analysis.hpp"
#include "tk/text.hpp"
#include "tk/trainer.hpp"
#include "tk/trec_io.hpp"
