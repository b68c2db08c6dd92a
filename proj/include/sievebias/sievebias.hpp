#pragma once

#include "sievebias/arith.hpp"
#include "sievebias/errors.hpp"
#include "sievebias/harness.hpp"
#include "sievebias/partition.hpp"
#include "sievebias/pipeline.hpp"
#include "sievebias/quadrature.hpp"
#include "sievebias/sequence.hpp"
