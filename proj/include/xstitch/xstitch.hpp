// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "xstitch/attention.hpp"
#include "xstitch/checkpoint.hpp"
#include "xstitch/config.hpp"
#include "xstitch/crossstitch.hpp"
#include "xstitch/data.hpp"
#include "xstitch/encoders.hpp"
#include "xstitch/errors.hpp"
#include "xstitch/gradcheck.hpp"
#include "xstitch/heads.hpp"
#include "xstitch/metrics.hpp"
#include "xstitch/model.hpp"
#include "xstitch/optimizer.hpp"
#include "xstitch/params.hpp"
#include "xstitch/rng.hpp"
#include "xstitch/synth.hpp"
#include "xstitch/tensor.hpp"
#include "xstitch/training.hpp"
#include "xstitch/vocab.hpp"
