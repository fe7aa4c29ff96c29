#include <stdio.h>
#include <string.h>
#include "delib.h"

int main(void) {
    DelibPlatform *p = NULL;
    if (delib_platform_open(NULL, &p) != DELIB_STATUS_OK) return 1;
    char *id = NULL;
    if (delib_create_discussion(p, "Food", "How should cities eat?", "host", &id) != DELIB_STATUS_OK) return 2;
    char *out = NULL;
    DelibStatus s = delib_clusters(p, "missing", 4, &out);
    if (s != DELIB_STATUS_NOT_FOUND || out != NULL) return 3;
    if (strstr(delib_last_error(), "not_found") == NULL) return 4;
    printf("%s %llu\n", delib_version(), (unsigned long long)delib_seq(p));
    delib_string_free(id);
    delib_platform_free(p);
    return 0;
}
