#pragma once

#include <chrono>
#include <optional>
#include <string>

namespace stva {

using Date = std::chrono::year_month_day;

/// Parses "YYYY-MM-DD". Returns nullopt for anything malformed or invalid.
std::optional<Date> parse_date(const std::string& s);

std::string format_date(const Date& d);

/// Days from a to b (negative if b precedes a).
long days_between(const Date& a, const Date& b);

Date add_days(const Date& d, long n);

bool is_sunday(const Date& d);

} // namespace stva
