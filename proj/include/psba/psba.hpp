#pragma once

#include "psba/attack.hpp"
#include "psba/classifier.hpp"
#include "psba/error.hpp"
#include "psba/estimator.hpp"
#include "psba/io.hpp"
#include "psba/oracle.hpp"
#include "psba/projection.hpp"
#include "psba/rng.hpp"
#include "psba/service.hpp"
#include "psba/tensor.hpp"
#include "psba/theory.hpp"
#include "psba/transforms.hpp"
#include "psba/zoo.hpp"
