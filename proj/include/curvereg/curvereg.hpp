#ifndef CURVEREG_CURVEREG_HPP
#define CURVEREG_CURVEREG_HPP

#include "curvereg/error.hpp"
#include "curvereg/splines.hpp"
#include "curvereg/model.hpp"
#include "curvereg/sampler.hpp"
#include "curvereg/saem.hpp"
#include "curvereg/oracle.hpp"
#include "curvereg/clustering.hpp"
#include "curvereg/metrics.hpp"
#include "curvereg/io.hpp"
#include "curvereg/app.hpp"

#endif
