#pragma once

#include "concnn/baselines.hpp"
#include "concnn/concurrent.hpp"
#include "concnn/data.hpp"
#include "concnn/error.hpp"
#include "concnn/evaluation.hpp"
#include "concnn/neuralnet.hpp"
#include "concnn/random.hpp"
#include "concnn/simulator.hpp"
#include "concnn/theory.hpp"
#include "concnn/trainer.hpp"
