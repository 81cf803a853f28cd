/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace qtdm {

// Thrown when a request exceeds a hard size cap (e.g. dense materialization
// of an exponentially large object).
class resource_limit_error : public std::runtime_error {
public:
  explicit resource_limit_error(const std::string& what)
      : std::runtime_error(what) {}
};

// Thrown when a metric is undefined for the given inputs (degenerate
// denominators, zero predicted probability with nonzero counts, ...).
class undefined_metric_error : public std::domain_error {
public:
  explicit undefined_metric_error(const std::string& what)
      : std::domain_error(what) {}
};

} // namespace qtdm
