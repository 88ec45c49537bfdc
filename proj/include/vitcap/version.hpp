#pragma once

#define VITCAP_VERSION_MAJOR 0
#define VITCAP_VERSION_MINOR 1
#define VITCAP_VERSION_PATCH 0
#define VITCAP_VERSION "0.1.0"
