#pragma once

#include "mvprior/detect.hpp"
#include "mvprior/dataset_io.hpp"
#include "mvprior/error.hpp"
#include "mvprior/eval.hpp"
#include "mvprior/geometry.hpp"
#include "mvprior/layout.hpp"
#include "mvprior/model_io.hpp"
#include "mvprior/prior.hpp"
#include "mvprior/protocol.hpp"
#include "mvprior/regularizer.hpp"
#include "mvprior/svm.hpp"
#include "mvprior/synth.hpp"
