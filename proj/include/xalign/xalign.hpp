#pragma once

#include "xalign/align.hpp"
#include "xalign/analysis.hpp"
#include "xalign/dictionary.hpp"
#include "xalign/error.hpp"
#include "xalign/evaluate.hpp"
#include "xalign/log.hpp"
#include "xalign/pca.hpp"
#include "xalign/procrustes.hpp"
#include "xalign/report.hpp"
#include "xalign/retrieval.hpp"
#include "xalign/rng.hpp"
#include "xalign/space.hpp"
#include "xalign/store.hpp"
#include "xalign/synth.hpp"
