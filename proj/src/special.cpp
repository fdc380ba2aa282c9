#include "indeed/special.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <stdexcept>

namespace indeed {

double log_gamma(double x) {
    if (!(x > 0.0)) throw std::domain_error("log_gamma: requires x > 0");
    return std::lgamma(x);
}

double digamma(double x) {
    if (!(x > 0.0)) throw std::domain_error("digamma: requires x > 0");
    return boost::math::digamma(x);
}

double reg_lower_inc_gamma(double a, double x) {
    if (!(a > 0.0)) throw std::domain_error("reg_lower_inc_gamma: requires a > 0");
    if (x <= 0.0) return 0.0;
    return boost::math::gamma_p(a, x);
}

double gamma_cdf(double alpha, double beta, double x) {
    if (!(alpha > 0.0) || !(beta > 0.0))
        throw std::domain_error("gamma_cdf: requires alpha, beta > 0");
    return reg_lower_inc_gamma(alpha, beta * x);
}

} // namespace indeed
