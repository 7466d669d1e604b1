#pragma once

#include "transrec/pipeline/checkpoint.hpp"
#include "transrec/pipeline/grad_check.hpp"
#include "transrec/pipeline/model.hpp"
#include "transrec/pipeline/train.hpp"
