#pragma once

// Convenience header for the whole library.

#include "geolgm/data.hpp"
#include "geolgm/errors.hpp"
#include "geolgm/fem.hpp"
#include "geolgm/fit.hpp"
#include "geolgm/geodesy.hpp"
#include "geolgm/laplace.hpp"
#include "geolgm/likelihood.hpp"
#include "geolgm/mcmc.hpp"
#include "geolgm/mesh.hpp"
#include "geolgm/model.hpp"
#include "geolgm/nelder_mead.hpp"
#include "geolgm/projector.hpp"
#include "geolgm/random.hpp"
#include "geolgm/simulate.hpp"
#include "geolgm/spacetime.hpp"
#include "geolgm/sparse_cholesky.hpp"
#include "geolgm/sparse_io.hpp"
#include "geolgm/spde.hpp"
#include "geolgm/surface.hpp"
