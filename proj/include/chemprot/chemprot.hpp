#pragma once

#include "chemprot/error.hpp"
#include "chemprot/random.hpp"
#include "chemprot/labels.hpp"
#include "chemprot/corpus.hpp"
#include "chemprot/depgraph.hpp"
#include "chemprot/serialize.hpp"
#include "chemprot/svm.hpp"
#include "chemprot/neural.hpp"
#include "chemprot/metrics.hpp"
#include "chemprot/training.hpp"
#include "chemprot/cnn.hpp"
#include "chemprot/rnn.hpp"
#include "chemprot/ensemble.hpp"
#include "chemprot/synthetic.hpp"
#include "chemprot/config.hpp"
#include "chemprot/pipeline.hpp"
