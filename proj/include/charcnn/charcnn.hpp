#pragma once

#include "corpus.hpp"
#include "ensemble.hpp"
#include "eval.hpp"
#include "gradcheck.hpp"
#include "model.hpp"
#include "persist.hpp"
#include "train.hpp"
