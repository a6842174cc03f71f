const char *kind(int c)
{
    // the kind code
    switch (c) {
    case 0:
        return "zero";
    }
    return "other";
}
