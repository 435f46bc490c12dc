#pragma once

// Umbrella header for the whole library.

#include "kblab/checkpoint.hpp"
#include "kblab/evaluate.hpp"
#include "kblab/formatting.hpp"
#include "kblab/ingest.hpp"
#include "kblab/knowledge_base.hpp"
#include "kblab/manifest.hpp"
#include "kblab/metrics.hpp"
#include "kblab/model.hpp"
#include "kblab/optimizer.hpp"
#include "kblab/pipeline.hpp"
#include "kblab/probes.hpp"
#include "kblab/rng.hpp"
#include "kblab/sampling.hpp"
#include "kblab/synth.hpp"
#include "kblab/trainer.hpp"
#include "kblab/triplet.hpp"
#include "kblab/vocab.hpp"
