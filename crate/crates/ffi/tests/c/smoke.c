#include <stdio.h>
#include <string.h>
#include "semhash.h"

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: smoke <params> <codebook>\n");
        return 2;
    }
    SemhashHead *head = NULL;
    if (semhash_head_load(argv[1], &head) != SEMHASH_STATUS_OK) {
        fprintf(stderr, "head: %s\n", semhash_last_error());
        return 1;
    }
    SemhashIndex *index = NULL;
    if (semhash_index_load(argv[2], &index) != SEMHASH_STATUS_OK) {
        fprintf(stderr, "index: %s\n", semhash_last_error());
        return 1;
    }
    size_t d = semhash_head_dim(head);
    size_t words = semhash_code_words(semhash_head_bits(head));
    float x[64];
    uint64_t code[4];
    memset(x, 0, sizeof x);
    if (d > 64 || words > 4) return 1;
    if (semhash_head_encode(head, x, 1, d, code, words) != SEMHASH_STATUS_OK) return 1;

    uint64_t ids[3];
    uint32_t dist[3];
    size_t count = 0;
    if (semhash_index_query(index, code, words, 3, ids, dist, &count) != SEMHASH_STATUS_OK) return 1;
    for (size_t i = 0; i < count; i++) printf("%llu %u\n", (unsigned long long)ids[i], dist[i]);

    SemhashHead *missing = NULL;
    if (semhash_head_load("/nonexistent/params", &missing) != SEMHASH_STATUS_IO) return 1;
    if (missing != NULL || semhash_last_error() == NULL) return 1;

    semhash_index_free(index);
    semhash_head_free(head);
    return 0;
}
