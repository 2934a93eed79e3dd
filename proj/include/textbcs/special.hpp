#pragma once

namespace textbcs::special {

// Digamma and trigamma for x > 0 (recurrence up to x >= 10, then the
// asymptotic series). The evidential code only calls them with x >= 1.
double digamma(double x);
double trigamma(double x);

// Regularized incomplete beta I_x(a, b) via Lentz's continued fraction.
double incomplete_beta(double a, double b, double x);

// Two-sided tail probability P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_sided(double t, double df);

}  // namespace textbcs::special
