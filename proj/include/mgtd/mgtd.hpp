#pragma once

#include "mgtd/types.hpp"
#include "mgtd/unicode.hpp"
#include "mgtd/corpus.hpp"
#include "mgtd/textprep.hpp"
#include "mgtd/nn.hpp"
#include "mgtd/encoder.hpp"
#include "mgtd/clshead.hpp"
#include "mgtd/crf.hpp"
#include "mgtd/hybrid.hpp"
#include "mgtd/train.hpp"
#include "mgtd/eval.hpp"
#include "mgtd/config.hpp"
#include "mgtd/commands.hpp"
#include "mgtd/toy_corpus.hpp"
