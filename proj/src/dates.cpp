#include "stva/dates.hpp"

#include <cstdio>

namespace stva {

namespace chrono = std::chrono;

std::optional<Date> parse_date(const std::string& s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
        if (s[i] < '0' || s[i] > '9') return std::nullopt;
    }
    int y = std::stoi(s.substr(0, 4));
    unsigned m = static_cast<unsigned>(std::stoi(s.substr(5, 2)));
    unsigned d = static_cast<unsigned>(std::stoi(s.substr(8, 2)));
    Date date{chrono::year{y}, chrono::month{m}, chrono::day{d}};
    if (!date.ok()) return std::nullopt;
    return date;
}

std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(d.year()),
                  static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
    return buf;
}

long days_between(const Date& a, const Date& b) {
    return (chrono::sys_days{b} - chrono::sys_days{a}).count();
}

Date add_days(const Date& d, long n) {
    return Date{chrono::sys_days{d} + chrono::days{n}};
}

bool is_sunday(const Date& d) {
    return chrono::weekday{chrono::sys_days{d}} == chrono::Sunday;
}

} // namespace stva
