#pragma once

// Everything except the command-line front end.

#include "vqcert/errors.hpp"
#include "vqcert/lipschitz.hpp"
#include "vqcert/metrics.hpp"
#include "vqcert/network.hpp"
#include "vqcert/nrb_io.hpp"
#include "vqcert/nroub.hpp"
#include "vqcert/quantizer.hpp"
#include "vqcert/sovqae.hpp"
#include "vqcert/tensor.hpp"
#include "vqcert/toy_data.hpp"
