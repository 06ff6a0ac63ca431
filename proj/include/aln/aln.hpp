// SPDX-License-Identifier: Apache-2.0
/**
 * @file   aln.hpp
 * @brief  Umbrella header for the acoustic-linguistic intent classifier.
 */
#pragma once

#include "aln/checkpoint.hpp"
#include "aln/dataset.hpp"
#include "aln/errors.hpp"
#include "aln/evaluation.hpp"
#include "aln/gradcheck.hpp"
#include "aln/layers.hpp"
#include "aln/matrix.hpp"
#include "aln/model.hpp"
#include "aln/ops.hpp"
#include "aln/optim.hpp"
#include "aln/rng.hpp"
#include "aln/textio.hpp"
#include "aln/training.hpp"
