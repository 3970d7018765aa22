#ifndef STABSTEER_HPP
#define STABSTEER_HPP

#include "stabsteer/core.hpp"
#include "stabsteer/errors.hpp"
#include "stabsteer/io.hpp"
#include "stabsteer/optim.hpp"
#include "stabsteer/pipeline.hpp"
#include "stabsteer/probe.hpp"
#include "stabsteer/segmenter.hpp"
#include "stabsteer/stability.hpp"
#include "stabsteer/subspace.hpp"
#include "stabsteer/synthetic.hpp"
#include "stabsteer/vectors.hpp"

#endif
