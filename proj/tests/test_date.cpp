#include <gtest/gtest.h>

#include "forecastkit/date.hpp"

using fk::Date;

TEST(Date, ParsesIsoAndRoundTrips) {
    const Date d = Date::parse("2025-03-01");
    EXPECT_EQ(d.iso(), "2025-03-01");
    EXPECT_EQ(Date::parse("2025-03-01T12:30:00Z"), d);
    EXPECT_EQ(Date::parse("2025-03-01 00:00:00"), d);
    EXPECT_EQ(Date::parse("1970-01-01").days(), 0);
}

TEST(Date, RejectsMalformedAndImpossibleDates) {
    EXPECT_THROW(Date::parse("2025-3-1"), fk::Error);
    EXPECT_THROW(Date::parse("2025/03/01"), fk::Error);
    EXPECT_THROW(Date::parse("2025-02-30"), fk::Error);
    EXPECT_THROW(Date::parse("2025-03-01X"), fk::Error);
    EXPECT_THROW(Date::parse(""), fk::Error);
}

TEST(Date, ArithmeticAndOrdering) {
    const Date a = Date::from_ymd(2024, 2, 28);
    EXPECT_EQ((a + 1).iso(), "2024-02-29");
    EXPECT_EQ((a + 2).iso(), "2024-03-01");
    EXPECT_EQ(Date::from_ymd(2025, 1, 1) - Date::from_ymd(2024, 1, 1), 366);
    EXPECT_LT(a, a + 1);
}

TEST(Date, DayOfYearFoldsLeapDay366) {
    EXPECT_EQ(Date::from_ymd(2025, 1, 1).day_of_year(), 1);
    EXPECT_EQ(Date::from_ymd(2025, 12, 31).day_of_year(), 365);
    EXPECT_EQ(Date::from_ymd(2024, 12, 30).day_of_year(), 365);
    EXPECT_EQ(Date::from_ymd(2024, 12, 31).day_of_year(), 365);
    EXPECT_EQ(Date::from_ymd(2024, 3, 1).day_of_year(), 61);
}
