#pragma once

// Umbrella header.

#include "common.hpp"
#include "lexicon.hpp"
#include "tagger.hpp"
#include "bpe.hpp"
#include "transformer.hpp"
#include "training.hpp"
#include "decoder.hpp"
#include "metrics.hpp"
#include "bias.hpp"
