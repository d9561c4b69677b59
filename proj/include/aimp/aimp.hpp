#pragma once

#include <aimp/audio_io.hpp>
#include <aimp/dataset.hpp>
#include <aimp/error.hpp>
#include <aimp/experiments.hpp>
#include <aimp/features.hpp>
#include <aimp/impair_synth.hpp>
#include <aimp/label_noise.hpp>
#include <aimp/nn/gradcheck.hpp>
#include <aimp/nn/layers.hpp>
#include <aimp/nn/model.hpp>
#include <aimp/nn/optim.hpp>
#include <aimp/nn/serialize.hpp>
#include <aimp/nn/train.hpp>
