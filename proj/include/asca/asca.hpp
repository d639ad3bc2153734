#pragma once

#include "asca/coding.hpp"
#include "asca/design.hpp"
#include "asca/diagnostics.hpp"
#include "asca/error.hpp"
#include "asca/glm.hpp"
#include "asca/inference.hpp"
#include "asca/io/csv.hpp"
#include "asca/pca.hpp"
#include "asca/power.hpp"
#include "asca/prep.hpp"
#include "asca/random.hpp"
#include "asca/sca.hpp"
#include "asca/svg.hpp"
