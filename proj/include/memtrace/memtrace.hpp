#pragma once

#include "memtrace/bleu.hpp"
#include "memtrace/categorize.hpp"
#include "memtrace/corpus.hpp"
#include "memtrace/extraction_game.hpp"
#include "memtrace/metrics.hpp"
#include "memtrace/model_client.hpp"
#include "memtrace/pipeline.hpp"
#include "memtrace/sample.hpp"
#include "memtrace/tokenization.hpp"
#include "memtrace/util.hpp"
