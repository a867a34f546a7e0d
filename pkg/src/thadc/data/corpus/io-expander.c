/*
 * Output driver for an SPI GPIO expander.  Configures the bus clock
 * once, then streams one latch byte per iteration as a full-duplex
 * message.
 */

#define SPI_IOC_MESSAGE_1 1075866368
#define SPI_IOC_WR_MAX_SPEED_HZ 1074031364
#define BUS_SPEED_HZ 500000
#define LATCH_COUNT 8

int push_latch(int fd, int value) {
    int status = ioctl(fd, SPI_IOC_MESSAGE_1, value);
    return status;
}

int main(void) {
    int fd = open("/dev/spidev0.0", 2);
    if (fd < 0) {
        return 1;
    }
    ioctl(fd, SPI_IOC_WR_MAX_SPEED_HZ, BUS_SPEED_HZ);
    int i = 0;
    while (i < LATCH_COUNT) {
        push_latch(fd, i);
        i = i + 1;
    }
    close(fd);
    return 0;
}
