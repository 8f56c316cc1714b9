#include "gpsgen/nn.hpp"

// header-only for now; translation unit kept so the target layout stays stable
