#ifndef CROWDCALL_CROWDCALL_HPP
#define CROWDCALL_CROWDCALL_HPP

#include "crowdcall/aggregate.hpp"
#include "crowdcall/analytics.hpp"
#include "crowdcall/corpus.hpp"
#include "crowdcall/encode.hpp"
#include "crowdcall/eval.hpp"
#include "crowdcall/neural.hpp"
#include "crowdcall/synth.hpp"
#include "crowdcall/util.hpp"
#include "crowdcall/windowing.hpp"

#endif  // CROWDCALL_CROWDCALL_HPP
