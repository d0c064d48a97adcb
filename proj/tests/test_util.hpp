#pragma once

#include <functional>
#include <string>

// Runs f, expecting an exception of type E whose message contains `needle`.
template <typename E>
bool throws_with(const std::function<void()>& f, const std::string& needle) {
    try {
        f();
    } catch (const E& e) {
        return std::string(e.what()).find(needle) != std::string::npos;
    } catch (...) {
        return false;
    }
    return false;
}
