#include "pgfwi/parallel.hpp"

#include <cstdlib>
#include <string>

namespace pgfwi {

int default_threads() {
    if (const char* env = std::getenv("PGFWI_THREADS")) {
        try {
            int n = std::stoi(env);
            if (n >= 1) return n;
        } catch (...) {
        }
    }
    return 1;
}

} // namespace pgfwi
