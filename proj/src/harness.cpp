// placeholder while the library core is brought up
#include "slab/config.hpp"
