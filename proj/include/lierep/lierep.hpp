#pragma once

// Everything except the CLI layer (cli.hpp, manifest.hpp), which needs OpenSSL.

#include "lierep/algebra.hpp"
#include "lierep/clebsch.hpp"
#include "lierep/dataset.hpp"
#include "lierep/errors.hpp"
#include "lierep/io.hpp"
#include "lierep/learnrep.hpp"
#include "lierep/numerics.hpp"
#include "lierep/reps.hpp"
#include "lierep/spacetimenet.hpp"
