#include "doctest.h"
#include "gradient_suite.hpp"

using namespace metareg;
using namespace metareg::testing;

TEST_CASE("autodiff gradients match central differences") {
  for (const GradCase& c : gradient_cases()) {
    for (bool is_double : {false, true}) {
      const GradCheckResult r = run_case(c, is_double, 20);
      INFO(c.name << (is_double ? " f64" : " f32") << " rel " << r.max_rel << " scaled " << r.max_scaled
                  << " max scale " << r.max_fd);
      CHECK(r.pass());
      CHECK(r.max_scaled < (is_double ? 1e-6 : 1e-3));
      CHECK(r.max_fd > 1e-3);
    }
  }
}
