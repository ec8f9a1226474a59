#pragma once

#include "memaudit/aggregate.hpp"
#include "memaudit/augment.hpp"
#include "memaudit/baselines.hpp"
#include "memaudit/calibrate.hpp"
#include "memaudit/contaminate.hpp"
#include "memaudit/embedder.hpp"
#include "memaudit/error.hpp"
#include "memaudit/eval.hpp"
#include "memaudit/linalg.hpp"
#include "memaudit/parallel.hpp"
#include "memaudit/report_io.hpp"
#include "memaudit/rng.hpp"
#include "memaudit/similarity.hpp"
#include "memaudit/synthetic.hpp"
#include "memaudit/tensorio.hpp"
#include "memaudit/whiten.hpp"
